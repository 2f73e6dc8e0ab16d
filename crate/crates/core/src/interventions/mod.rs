//! The five audio interventions, their control-variable distributions and a
//! single seeded entry point, [`Intervener::apply`].
//!
//! Every intervention preserves length and sample rate and returns samples in
//! `[-1, 1]`.

pub mod codec;
pub mod loudness;
pub mod mulaw;
pub mod noise;
pub mod vad;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{SeedContext, Waveform};
use crate::error::{Error, Result};

pub use codec::{codec_degrade, CodecBackend, BITRATES_KBPS};
pub use loudness::{loudness_normalize, measure_loudness};
pub use mulaw::mu_law;
pub use noise::add_white_noise;
pub use vad::{detect_nonspeech, zero_nonspeech};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Codec,
    WhiteNoise,
    LoudnessNorm,
    NonspeechZero,
    MuLaw,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 5] = [
        InterventionKind::Codec,
        InterventionKind::WhiteNoise,
        InterventionKind::LoudnessNorm,
        InterventionKind::NonspeechZero,
        InterventionKind::MuLaw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InterventionKind::Codec => "codec",
            InterventionKind::WhiteNoise => "white_noise",
            InterventionKind::LoudnessNorm => "loudness_norm",
            InterventionKind::NonspeechZero => "nonspeech_zero",
            InterventionKind::MuLaw => "mu_law",
        }
    }

    /// Distribution used when a config does not override it.
    pub fn default_dist(self) -> ParamDist {
        match self {
            InterventionKind::Codec => ParamDist::Choice {
                values: BITRATES_KBPS.iter().map(|&b| b as f64).collect(),
            },
            InterventionKind::WhiteNoise => ParamDist::Uniform { lo: 0.0, hi: 30.0 },
            InterventionKind::LoudnessNorm => ParamDist::Uniform {
                lo: -31.0,
                hi: -13.0,
            },
            InterventionKind::NonspeechZero => ParamDist::Dirac { value: 1.0 },
            InterventionKind::MuLaw => ParamDist::Dirac {
                value: mulaw::DEFAULT_MU as f64,
            },
        }
    }

    fn check_value(self, z: f64) -> Result<()> {
        let bad = |why: &str| {
            Err(Error::InvalidParameter(format!(
                "{} control value {z}: {why}",
                self.name()
            )))
        };
        if !z.is_finite() {
            return bad("not finite");
        }
        match self {
            InterventionKind::Codec => codec::bitrate_from_z(z).map(|_| ()),
            InterventionKind::NonspeechZero if !(0.0..=1.0).contains(&z) => {
                bad("proportion must lie in [0, 1]")
            }
            InterventionKind::MuLaw if z < 1.0 || z.fract() != 0.0 || z > u32::MAX as f64 => {
                bad("mu must be a positive integer")
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterventionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InterventionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown intervention `{s}`")))
    }
}

/// Distribution of the intervention control variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ParamDist {
    /// Continuous uniform on `[lo, hi)`. For the codec it is uniform over the
    /// table bitrates that fall inside `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    Dirac { value: f64 },
    /// Uniform over a finite set.
    Choice { values: Vec<f64> },
}

impl ParamDist {
    fn support(&self, kind: InterventionKind) -> Vec<f64> {
        match (self, kind) {
            (ParamDist::Uniform { lo, hi }, InterventionKind::Codec) => BITRATES_KBPS
                .iter()
                .map(|&b| b as f64)
                .filter(|b| (lo..=hi).contains(&b))
                .collect(),
            (ParamDist::Choice { values }, _) => values.clone(),
            (ParamDist::Dirac { value }, _) => vec![*value],
            (ParamDist::Uniform { .. }, _) => Vec::new(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, kind: InterventionKind, rng: &mut R) -> f64 {
        match self {
            ParamDist::Uniform { lo, hi } if kind != InterventionKind::Codec => {
                lo + (hi - lo) * rng.random::<f64>()
            }
            ParamDist::Dirac { value } => *value,
            _ => {
                let support = self.support(kind);
                support[rng.random_range(0..support.len())]
            }
        }
    }

    /// Whether `z` could have been drawn from this distribution.
    pub fn contains(&self, kind: InterventionKind, z: f64) -> bool {
        match self {
            ParamDist::Uniform { lo, hi } if kind != InterventionKind::Codec => {
                (*lo..=*hi).contains(&z)
            }
            _ => self.support(kind).contains(&z),
        }
    }
}

/// An intervention type together with its control-variable distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub param_dist: ParamDist,
}

impl InterventionSpec {
    pub fn new(kind: InterventionKind, param_dist: ParamDist) -> Result<Self> {
        let spec = InterventionSpec { kind, param_dist };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_default_dist(kind: InterventionKind) -> Self {
        InterventionSpec {
            kind,
            param_dist: kind.default_dist(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.param_dist {
            ParamDist::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidParameter(format!(
                        "{}: uniform distribution needs finite lo < hi, got [{lo}, {hi}]",
                        self.kind
                    )));
                }
                if self.kind == InterventionKind::Codec {
                    if self.param_dist.support(self.kind).is_empty() {
                        return Err(Error::InvalidParameter(format!(
                            "codec: no table bitrate within [{lo}, {hi}]"
                        )));
                    }
                } else {
                    self.kind.check_value(*lo)?;
                    self.kind.check_value(*hi)?;
                }
            }
            ParamDist::Dirac { value } => self.kind.check_value(*value)?,
            ParamDist::Choice { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "{}: empty choice set",
                        self.kind
                    )));
                }
                for &v in values {
                    self.kind.check_value(v)?;
                }
            }
        }
        Ok(())
    }
}

/// Record of one intervention actually applied to one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedIntervention {
    pub utt_id: String,
    pub kind: InterventionKind,
    pub z: f64,
    pub config: String,
}

/// Applies interventions with fixed processing settings.
#[derive(Debug, Clone)]
pub struct Intervener {
    pub vad_margin_db: f64,
    pub codec: CodecBackend,
}

impl Default for Intervener {
    fn default() -> Self {
        Intervener {
            vad_margin_db: vad::DEFAULT_VAD_MARGIN_DB,
            codec: CodecBackend::Proxy,
        }
    }
}

/// Draw the control value for one file. This is the first draw of the
/// file's seeded stream, so it matches what [`Intervener::apply`] uses.
pub fn sample_z(spec: &InterventionSpec, ctx: &SeedContext) -> f64 {
    spec.param_dist.sample(spec.kind, &mut ctx.rng())
}

impl Intervener {
    /// Perturb `w` with the control value `z`, drawing any further
    /// randomness from `rng`.
    pub fn apply_with_z<R: Rng + ?Sized>(
        &self,
        w: &Waveform,
        kind: InterventionKind,
        z: f64,
        rng: &mut R,
    ) -> Result<Waveform> {
        kind.check_value(z)?;
        match kind {
            InterventionKind::Codec => self.codec.degrade(w, codec::bitrate_from_z(z)?),
            InterventionKind::WhiteNoise => add_white_noise(w, z, rng),
            InterventionKind::LoudnessNorm => loudness_normalize(w, z),
            InterventionKind::NonspeechZero => zero_nonspeech(w, z, self.vad_margin_db, rng),
            InterventionKind::MuLaw => mu_law(w, z as u32),
        }
    }

    /// Sample `z` from the spec using the file's derived seed, then perturb.
    pub fn apply(
        &self,
        w: &Waveform,
        spec: &InterventionSpec,
        ctx: &SeedContext,
    ) -> Result<(Waveform, AppliedIntervention)> {
        let mut rng = ctx.rng();
        let z = spec.param_dist.sample(spec.kind, &mut rng);
        let out = self.apply_with_z(w, spec.kind, z, &mut rng)?;
        Ok((
            out,
            AppliedIntervention {
                utt_id: ctx.utt_id.clone(),
                kind: spec.kind,
                z,
                config: ctx.configuration.clone(),
            },
        ))
    }
}

/// [`Intervener::apply`] with default settings.
pub fn apply(
    w: &Waveform,
    spec: &InterventionSpec,
    ctx: &SeedContext,
) -> Result<(Waveform, AppliedIntervention)> {
    Intervener::default().apply(w, spec, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn speechy(id: &str) -> Waveform {
        let mut s: Vec<f64> = vec![0.0; 4000];
        s.iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 1e-4 * ((i % 5) as f64 - 2.0));
        s.extend((0..16_000).map(|i| {
            let t = i as f64 / 16_000.0;
            0.3 * (2.0 * std::f64::consts::PI * 180.0 * t).sin()
                + 0.1 * (2.0 * std::f64::consts::PI * 2700.0 * t).sin()
        }));
        Waveform::new(id, 16_000, s).unwrap()
    }

    #[test]
    fn mu_law_dirac_always_255() {
        let spec = InterventionSpec::with_default_dist(InterventionKind::MuLaw);
        for i in 0..20 {
            let ctx = SeedContext::new(i, format!("u{i}"), "mu_law", "B");
            assert_eq!(sample_z(&spec, &ctx), 255.0);
        }
    }

    #[test]
    fn uniform_noise_z_reproducible() {
        let spec = InterventionSpec::with_default_dist(InterventionKind::WhiteNoise);
        let ctx = SeedContext::new(42, "u1", "white_noise", "A");
        let w = speechy("u1");
        let (a, ra) = apply(&w, &spec, &ctx).unwrap();
        let (b, rb) = apply(&w, &spec, &ctx).unwrap();
        assert_eq!(ra.z, rb.z);
        assert_eq!(a, b);
        assert!((0.0..30.0).contains(&ra.z));
        assert_eq!(sample_z(&spec, &ctx), ra.z);
    }

    #[test]
    fn codec_bitrates_uniform_over_table() {
        let spec = InterventionSpec::with_default_dist(InterventionKind::Codec);
        let draws = 10_000usize;
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for i in 0..draws {
            let ctx = SeedContext::new(1, format!("utt{i}"), "codec", "A");
            *counts.entry(sample_z(&spec, &ctx) as u64).or_default() += 1;
        }
        assert_eq!(counts.len(), BITRATES_KBPS.len());
        let p = 1.0 / BITRATES_KBPS.len() as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for (b, c) in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{b}: {c}");
        }
    }

    #[test]
    fn codec_uniform_range_restricts_table() {
        let spec = InterventionSpec::new(
            InterventionKind::Codec,
            ParamDist::Uniform { lo: 16.0, hi: 48.0 },
        )
        .unwrap();
        for i in 0..200 {
            let z = sample_z(&spec, &SeedContext::new(i, "x", "codec", "A"));
            assert!([16.0, 24.0, 32.0, 40.0, 48.0].contains(&z));
        }
    }

    #[test]
    fn every_kind_keeps_length_rate_and_range() {
        let w = speechy("u2");
        for kind in InterventionKind::ALL {
            let spec = InterventionSpec::with_default_dist(kind);
            let ctx = SeedContext::new(3, "u2", kind.name(), "C");
            let (out, rec) = apply(&w, &spec, &ctx).unwrap();
            assert_eq!(out.len(), w.len(), "{kind}");
            assert_eq!(out.sample_rate_hz(), w.sample_rate_hz());
            assert!(out.samples().iter().all(|s| s.abs() <= 1.0), "{kind}");
            assert!(spec.param_dist.contains(kind, rec.z));
            assert_eq!(rec.config, "C");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        use InterventionKind::*;
        assert!(InterventionSpec::new(WhiteNoise, ParamDist::Uniform { lo: 5.0, hi: 5.0 }).is_err());
        assert!(InterventionSpec::new(NonspeechZero, ParamDist::Dirac { value: 1.5 }).is_err());
        assert!(InterventionSpec::new(MuLaw, ParamDist::Dirac { value: 0.0 }).is_err());
        assert!(InterventionSpec::new(Codec, ParamDist::Choice { values: vec![17.0] }).is_err());
        assert!(InterventionSpec::new(Codec, ParamDist::Uniform { lo: 17.0, hi: 20.0 }).is_err());
        assert!(InterventionSpec::new(LoudnessNorm, ParamDist::Uniform { lo: -31.0, hi: -13.0 }).is_ok());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in InterventionKind::ALL {
            assert_eq!(kind.name().parse::<InterventionKind>().unwrap(), kind);
        }
        assert!("mp3".parse::<InterventionKind>().is_err());
    }
}
