//! Waveform container, 16-bit PCM WAVE I/O and per-file seed derivation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 16_000;

/// Mono audio with real amplitudes nominally in `[-1, 1]`.
///
/// A `Waveform` is immutable once built; every processing step returns a new
/// value carrying the same id and sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    id: String,
    sample_rate_hz: u32,
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(id: impl Into<String>, sample_rate_hz: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!(
                "non-finite sample at index {pos}"
            )));
        }
        Ok(Waveform {
            id: id.into(),
            sample_rate_hz,
            samples,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean square over the whole file.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    /// Same id and rate, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Waveform::new(self.id.clone(), self.sample_rate_hz, samples)
    }

    pub fn with_id(&self, id: impl Into<String>) -> Self {
        Waveform {
            id: id.into(),
            ..self.clone()
        }
    }

    /// Hard clip to `[-1, 1]`.
    pub fn clipped(&self) -> Self {
        Waveform {
            samples: self.samples.iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Quantize an amplitude to a 16-bit code: round half away from zero, then
/// saturate at full scale.
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn dequantize_i16(code: i16) -> f64 {
    code as f64 / 32768.0
}

/// Read a 16-bit mono PCM RIFF/WAVE file. The waveform id is the file stem.
pub fn read_pcm(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |reason: String| Error::Wav {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(format!(
            "{}-bit {:?} samples, expected 16-bit integer PCM",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(dequantize_i16))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(e.to_string()))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Waveform::new(id, spec.sample_rate, samples)
}

/// Write a waveform as 16-bit mono PCM WAVE.
pub fn write_pcm(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map)?;
    for &s in &w.samples {
        writer.write_sample(quantize_i16(s)).map_err(map)?;
    }
    writer.finalize().map_err(map)
}

/// Inputs to per-file seed derivation.
///
/// The derived seed is the first eight bytes (little endian) of
/// `SHA-256("hansaudit-seed-v1" || master_seed as u64 LE || field*)`, where each
/// string field is written as its byte length (u64 LE) followed by its UTF-8
/// bytes, in the order utterance id, intervention, configuration. The length
/// prefix keeps `("ab", "c")` and `("a", "bc")` apart.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedContext {
    pub master_seed: u64,
    pub utt_id: String,
    pub intervention: String,
    pub configuration: String,
}

impl SeedContext {
    pub fn new(
        master_seed: u64,
        utt_id: impl Into<String>,
        intervention: impl Into<String>,
        configuration: impl Into<String>,
    ) -> Self {
        SeedContext {
            master_seed,
            utt_id: utt_id.into(),
            intervention: intervention.into(),
            configuration: configuration.into(),
        }
    }

    pub fn seed(&self) -> u64 {
        derive_seed(self)
    }

    /// A ChaCha20 stream keyed by the derived seed.
    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.seed())
    }
}

pub fn derive_seed(ctx: &SeedContext) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"hansaudit-seed-v1");
    hasher.update(ctx.master_seed.to_le_bytes());
    for field in [&ctx.utt_id, &ctx.intervention, &ctx.configuration] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_file_reads_as_one_second_of_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        let w = Waveform::new("silence", 16_000, vec![0.0; 16_000]).unwrap();
        write_pcm(&w, &path).unwrap();
        let back = read_pcm(&path).unwrap();
        assert_eq!(back.id(), "silence");
        assert_eq!(back.len(), 16_000);
        assert_eq!(back.duration_s(), 1.0);
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn quantization_rules() {
        assert_eq!(quantize_i16(1.0), 32767);
        assert_eq!(quantize_i16(0.0), 0);
        assert_eq!(quantize_i16(-1.0), -32768);
        assert_eq!(quantize_i16(32767.0 / 32768.0), 32767);
        assert_eq!(dequantize_i16(32767), 32767.0 / 32768.0);
        // half-way values round away from zero
        assert_eq!(quantize_i16(0.5 / 32768.0), 1);
        assert_eq!(quantize_i16(-0.5 / 32768.0), -1);
        assert_eq!(quantize_i16(3.0), 32767);
    }

    #[test]
    fn random_content_round_trips_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeedContext::new(7, "rt", "", "").rng();
        let samples = (0..4000)
            .map(|_| dequantize_i16(rng.random::<i16>()))
            .collect();
        let w = Waveform::new("a", 16_000, samples).unwrap();
        let first = dir.path().join("a.wav");
        let second = dir.path().join("b.wav");
        write_pcm(&w, &first).unwrap();
        let read = read_pcm(&first).unwrap();
        assert_eq!(read.samples(), w.samples());
        write_pcm(&read, &second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn rejects_stereo_and_wrong_depth() {
        let dir = tempfile::tempdir().unwrap();
        for (channels, bits) in [(2u16, 16u16), (1, 24)] {
            let path = dir.path().join(format!("f{channels}_{bits}.wav"));
            let spec = hound::WavSpec {
                channels,
                sample_rate: 16_000,
                bits_per_sample: bits,
                sample_format: hound::SampleFormat::Int,
            };
            let mut wr = hound::WavWriter::create(&path, spec).unwrap();
            for _ in 0..channels * 10 {
                wr.write_sample(0i32).unwrap();
            }
            wr.finalize().unwrap();
            assert!(matches!(read_pcm(&path), Err(Error::Wav { .. })));
        }
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFF\x00\x00not a wave file").unwrap();
        assert!(matches!(read_pcm(&junk), Err(Error::Wav { .. })));
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert!(Waveform::new("x", 16_000, vec![0.0, f64::NAN]).is_err());
        assert!(Waveform::new("x", 0, vec![0.0]).is_err());
    }

    #[test]
    fn seed_is_deterministic_and_input_sensitive() {
        let a = SeedContext::new(1, "LA_T_1000001", "white_noise", "A");
        assert_eq!(derive_seed(&a), derive_seed(&a.clone()));
        let b = SeedContext::new(1, "LA_T_1000002", "white_noise", "A");
        assert_ne!(derive_seed(&a), derive_seed(&b));
        let c = SeedContext::new(1, "LA_T_1000001", "white_noise", "B");
        assert_ne!(derive_seed(&a), derive_seed(&c));
        // field boundaries matter
        let d = SeedContext::new(1, "ab", "c", "");
        let e = SeedContext::new(1, "a", "bc", "");
        assert_ne!(derive_seed(&d), derive_seed(&e));
    }

    #[test]
    fn master_seed_change_moves_every_file() {
        let ids: Vec<String> = (0..2000).map(|i| format!("utt_{i:05}")).collect();
        for id in &ids {
            let s0 = derive_seed(&SeedContext::new(10, id, "mu_law", "B"));
            let s1 = derive_seed(&SeedContext::new(11, id, "mu_law", "B"));
            assert_ne!(s0, s1, "{id}");
        }
        let mut all: Vec<u64> = ids
            .iter()
            .map(|id| derive_seed(&SeedContext::new(10, id, "mu_law", "B")))
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), ids.len());
    }

    proptest! {
        #[test]
        fn one_char_change_changes_seed(id in "[A-Za-z0-9_]{1,24}", pos in 0usize..24, c in "[A-Za-z0-9_]") {
            let pos = pos % id.len();
            let mut other: Vec<char> = id.chars().collect();
            let c = c.chars().next().unwrap();
            prop_assume!(other[pos] != c);
            other[pos] = c;
            let other: String = other.into_iter().collect();
            prop_assert_ne!(
                derive_seed(&SeedContext::new(3, &id, "codec", "C")),
                derive_seed(&SeedContext::new(3, other, "codec", "C"))
            );
        }
    }
}
