//! μ-law compress, quantize, expand.

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const DEFAULT_MU: u32 = 255;

/// Companding curve `sign(x) ln(1 + mu|x|) / ln(1 + mu)`.
pub fn compress(x: f64, mu: f64) -> f64 {
    x.signum() * (mu * x.abs()).ln_1p() / mu.ln_1p()
}

/// Inverse of [`compress`].
pub fn expand(y: f64, mu: f64) -> f64 {
    y.signum() * ((y.abs() * mu.ln_1p()).exp() - 1.0) / mu
}

/// Mid-tread quantizer with `mu + 1` codes spanning `[-1, 1]`.
///
/// The step is `2 / (mu + 1)`; codes run from `-(mu + 1) / 2` to
/// `(mu + 1) / 2 - 1` so that zero is a reconstruction level. For `mu = 255`
/// this is the usual 8-bit, 256-code layout.
#[derive(Debug, Clone, Copy)]
pub struct MuLawQuantizer {
    mu: f64,
    step: f64,
    min_code: f64,
    max_code: f64,
}

impl MuLawQuantizer {
    pub fn new(mu: u32) -> Result<Self> {
        if mu == 0 {
            return Err(Error::InvalidParameter("mu must be positive".into()));
        }
        let levels = mu as f64 + 1.0;
        let half = (levels / 2.0).floor();
        Ok(MuLawQuantizer {
            mu: mu as f64,
            step: 2.0 / levels,
            min_code: -half,
            max_code: levels - half - 1.0,
        })
    }

    /// Quantizer step in the companded domain.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn encode(&self, x: f64) -> i32 {
        let y = compress(x.clamp(-1.0, 1.0), self.mu);
        (y / self.step).round().clamp(self.min_code, self.max_code) as i32
    }

    pub fn decode(&self, code: i32) -> f64 {
        expand(code as f64 * self.step, self.mu)
    }

    pub fn round_trip(&self, x: f64) -> f64 {
        self.decode(self.encode(x))
    }

    /// Largest distance between adjacent reconstruction levels, which sits at
    /// the top of the curve. Also covers the clamped region above the
    /// highest code.
    pub fn max_expansion_step(&self) -> f64 {
        let top = self.max_code * self.step;
        expand(1.0, self.mu) - expand(top, self.mu)
    }
}

pub fn mu_law(w: &Waveform, mu: u32) -> Result<Waveform> {
    let q = MuLawQuantizer::new(mu)?;
    w.with_samples(w.samples().iter().map(|&x| q.round_trip(x)).collect())
}
