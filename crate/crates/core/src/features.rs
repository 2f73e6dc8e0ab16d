//! Linear-frequency cepstral coefficients.
//!
//! Per frame: Hamming window, power spectrum, triangular filters spaced
//! linearly from 0 Hz to Nyquist, log filterbank energies, orthonormal
//! DCT-II. Static cepstra are followed by first and second order deltas
//! computed by `(c[t+1] - c[t-1]) / 2` with edge frames replicated.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::dsp::{hamming, FftPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LfccConfig {
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub n_fft: usize,
    pub n_filters: usize,
    pub n_ceps: usize,
    pub deltas: bool,
    /// Filterbank energies are floored at this fraction of the utterance's
    /// largest filterbank energy before the log.
    pub log_floor_rel: f64,
}

impl Default for LfccConfig {
    fn default() -> Self {
        LfccConfig {
            frame_len_s: 0.020,
            hop_s: 0.010,
            n_fft: 512,
            n_filters: 20,
            n_ceps: 20,
            deltas: true,
            log_floor_rel: 1e-10,
        }
    }
}

impl LfccConfig {
    pub fn dim(&self) -> usize {
        if self.deltas {
            3 * self.n_ceps
        } else {
            self.n_ceps
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("LFCC config: {m}")));
        if !(self.frame_len_s > 0.0 && self.hop_s > 0.0) {
            return bad("frame length and hop must be positive");
        }
        if self.n_filters == 0 || self.n_ceps == 0 || self.n_ceps > self.n_filters {
            return bad("need 0 < n_ceps <= n_filters");
        }
        if !(self.log_floor_rel > 0.0 && self.log_floor_rel < 1.0) {
            return bad("log floor must lie in (0, 1)");
        }
        Ok(())
    }

    /// Stable 64-bit digest of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"lfcc-v1");
        h.update(self.frame_len_s.to_le_bytes());
        h.update(self.hop_s.to_le_bytes());
        h.update((self.n_fft as u64).to_le_bytes());
        h.update((self.n_filters as u64).to_le_bytes());
        h.update((self.n_ceps as u64).to_le_bytes());
        h.update([self.deltas as u8]);
        h.update(self.log_floor_rel.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// `T x D` feature matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_frames: usize,
    dim: usize,
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub fingerprint: u64,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, frame_len_s: f64, hop_s: f64, fingerprint: u64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        let n_frames = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite feature value".into()));
        }
        Ok(FeatureMatrix {
            data,
            n_frames,
            dim,
            frame_len_s,
            hop_s,
            fingerprint,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.n_frames)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Reusable LFCC extractor: FFT plan, window and filterbank for one sample
/// rate.
#[derive(Debug, Clone)]
pub struct Lfcc {
    cfg: LfccConfig,
    sample_rate_hz: u32,
    frame_len: usize,
    hop: usize,
    window: Vec<f64>,
    fft: FftPair,
    filters: Vec<Vec<(usize, f64)>>,
    dct: Vec<Vec<f64>>,
}

impl Lfcc {
    pub fn new(cfg: &LfccConfig, sample_rate_hz: u32) -> Result<Self> {
        cfg.validate()?;
        let fs = sample_rate_hz as f64;
        let frame_len = (cfg.frame_len_s * fs).round() as usize;
        let hop = (cfg.hop_s * fs).round() as usize;
        if frame_len == 0 || hop == 0 || frame_len > cfg.n_fft {
            return Err(Error::InvalidParameter(format!(
                "LFCC config: frame of {frame_len} samples, hop {hop}, FFT {}",
                cfg.n_fft
            )));
        }
        Ok(Lfcc {
            cfg: cfg.clone(),
            sample_rate_hz,
            frame_len,
            hop,
            window: hamming(frame_len),
            fft: FftPair::new(cfg.n_fft),
            filters: linear_filterbank(cfg.n_filters, cfg.n_fft, fs),
            dct: dct2_matrix(cfg.n_ceps, cfg.n_filters),
        })
    }

    pub fn config(&self) -> &LfccConfig {
        &self.cfg
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            1 + (n_samples - self.frame_len) / self.hop
        }
    }

    /// Triangular-filter energies per frame, before the floor and log.
    pub fn filterbank_energies(&self, w: &Waveform) -> Result<Vec<Vec<f64>>> {
        if w.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::InvalidParameter(format!(
                "{}: sample rate {} but extractor built for {}",
                w.id(),
                w.sample_rate_hz(),
                self.sample_rate_hz
            )));
        }
        let t = self.n_frames(w.len());
        if t == 0 {
            return Err(Error::TooShort(format!(
                "{}: {} samples, one LFCC frame needs {}",
                w.id(),
                w.len(),
                self.frame_len
            )));
        }
        let mut frame = vec![0.0; self.frame_len];
        Ok((0..t)
            .map(|i| {
                let seg = &w.samples()[i * self.hop..i * self.hop + self.frame_len];
                for ((f, s), win) in frame.iter_mut().zip(seg).zip(&self.window) {
                    *f = s * win;
                }
                let power = self.fft.power_spectrum(&frame);
                self.filters
                    .iter()
                    .map(|taps| taps.iter().map(|&(k, g)| g * power[k]).sum())
                    .collect()
            })
            .collect())
    }

    pub fn extract(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let energies = self.filterbank_energies(w)?;
        let max = energies
            .iter()
            .flatten()
            .copied()
            .fold(0.0f64, f64::max);
        let floor = (max * self.cfg.log_floor_rel).max(f64::MIN_POSITIVE);
        let ceps: Vec<Vec<f64>> = energies
            .iter()
            .map(|e| {
                let logs: Vec<f64> = e.iter().map(|v| v.max(floor).ln()).collect();
                self.dct
                    .iter()
                    .map(|basis| basis.iter().zip(&logs).map(|(b, l)| b * l).sum())
                    .collect()
            })
            .collect();
        let rows = if self.cfg.deltas {
            let d1 = deltas(&ceps);
            let d2 = deltas(&d1);
            ceps.into_iter()
                .zip(d1)
                .zip(d2)
                .map(|((mut c, a), b)| {
                    c.extend(a);
                    c.extend(b);
                    c
                })
                .collect()
        } else {
            ceps
        };
        FeatureMatrix::from_rows(rows, self.cfg.frame_len_s, self.cfg.hop_s, self.cfg.fingerprint())
    }
}

pub fn lfcc(w: &Waveform, cfg: &LfccConfig) -> Result<FeatureMatrix> {
    Lfcc::new(cfg, w.sample_rate_hz())?.extract(w)
}

/// Sparse triangular filters with centers `m * nyquist / (n + 1)`,
/// `m = 1..=n`, evaluated at the FFT bin frequencies.
pub fn linear_filterbank(n_filters: usize, n_fft: usize, fs: f64) -> Vec<Vec<(usize, f64)>> {
    let nyquist = fs / 2.0;
    let spacing = nyquist / (n_filters + 1) as f64;
    (1..=n_filters)
        .map(|m| {
            let (lo, center, hi) = (
                (m - 1) as f64 * spacing,
                m as f64 * spacing,
                (m + 1) as f64 * spacing,
            );
            (0..=n_fft / 2)
                .filter_map(|k| {
                    let f = k as f64 * fs / n_fft as f64;
                    let g = if f > lo && f <= center {
                        (f - lo) / (center - lo)
                    } else if f > center && f < hi {
                        (hi - f) / (hi - center)
                    } else {
                        0.0
                    };
                    (g > 0.0).then_some((k, g))
                })
                .collect()
        })
        .collect()
}

fn dct2_matrix(n_out: usize, n_in: usize) -> Vec<Vec<f64>> {
    (0..n_out)
        .map(|n| {
            let scale = if n == 0 {
                (1.0 / n_in as f64).sqrt()
            } else {
                (2.0 / n_in as f64).sqrt()
            };
            (0..n_in)
                .map(|m| {
                    scale * (std::f64::consts::PI * n as f64 * (m as f64 + 0.5) / n_in as f64).cos()
                })
                .collect()
        })
        .collect()
}

fn deltas(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let last = rows.len() - 1;
    (0..rows.len())
        .map(|t| {
            let next = &rows[(t + 1).min(last)];
            let prev = &rows[t.saturating_sub(1)];
            next.iter().zip(prev).map(|(a, b)| (a - b) / 2.0).collect()
        })
        .collect()
}

const CACHE_MAGIC: &[u8; 4] = b"HAFC";
const CACHE_VERSION: u32 = 1;

/// Cache layout, all little endian: magic `HAFC`, version `u32`,
/// fingerprint `u64`, frames `u64`, dim `u64`, frame length `f64`, hop `f64`,
/// then `frames * dim` values as `f64`, row-major.
pub fn write_cache(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(48 + m.data.len() * 8);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&m.fingerprint.to_le_bytes());
    buf.extend_from_slice(&(m.n_frames as u64).to_le_bytes());
    buf.extend_from_slice(&(m.dim as u64).to_le_bytes());
    buf.extend_from_slice(&m.frame_len_s.to_le_bytes());
    buf.extend_from_slice(&m.hop_s.to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read a cached matrix. Returns `Ok(None)` when the file is missing or was
/// written under a different feature configuration.
pub fn read_cache(path: impl AsRef<Path>, fingerprint: u64) -> Result<Option<FeatureMatrix>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    match std::fs::File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.len() < 48 || &bytes[..4] != CACHE_MAGIC {
        return Ok(None);
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION || u64_at(8) != fingerprint {
        return Ok(None);
    }
    let (n_frames, dim) = (u64_at(16) as usize, u64_at(24) as usize);
    let body = &bytes[48..];
    if body.len() != n_frames * dim * 8 {
        return Ok(None);
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(FeatureMatrix {
        data,
        n_frames,
        dim,
        frame_len_s: f64::from_bits(u64_at(32)),
        hop_s: f64::from_bits(u64_at(40)),
        fingerprint,
    }))
}
