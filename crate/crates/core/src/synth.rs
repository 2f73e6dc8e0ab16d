//! Desk-scale synthetic data: a two-class harmonic-complex corpus in
//! ASVspoof layout, and a score sampler that draws from the linear score
//! model directly.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{write_pcm, SeedContext, Waveform};
use crate::error::{Error, Result};
use crate::protocol::{write_protocol, ClassLabel, InterventionConfig, Subset, TrialRecord};
use crate::regression::RegressionRow;

/// How one class is synthesised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassRecipe {
    /// Mean spectral tilt of the partials.
    pub tilt_db_per_oct: f64,
    /// Per-file standard deviation of the tilt.
    pub tilt_jitter_db: f64,
    /// Upper bound on the number of partials (also capped below Nyquist).
    pub harmonics: usize,
    /// Relative depth of the slow f0 vibrato.
    pub f0_jitter: f64,
    /// Independent uniform phase per partial instead of a coherent start.
    pub random_phase: bool,
}

impl Default for ClassRecipe {
    fn default() -> Self {
        ClassRecipe {
            tilt_db_per_oct: -6.0,
            tilt_jitter_db: 1.5,
            harmonics: 40,
            f0_jitter: 0.02,
            random_phase: false,
        }
    }
}

impl ClassRecipe {
    pub fn bonafide() -> Self {
        ClassRecipe::default()
    }

    pub fn spoof() -> Self {
        ClassRecipe {
            tilt_db_per_oct: -3.0,
            random_phase: true,
            ..ClassRecipe::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusSpec {
    pub train_per_class: usize,
    pub dev_per_class: usize,
    pub eval_per_class: usize,
    /// Voiced duration range, excluding the pauses.
    pub duration_s: (f64, f64),
    /// Leading and trailing pause length range.
    pub pause_s: (f64, f64),
    pub f0_hz: (f64, f64),
    pub sample_rate_hz: u32,
    /// RMS level of the voiced part.
    pub level_dbfs: f64,
    pub level_jitter_db: f64,
    /// Background hiss present over the whole file, pauses included.
    pub noise_floor_dbfs: f64,
    pub bonafide: ClassRecipe,
    pub spoof: ClassRecipe,
    pub seed: u64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        SynthCorpusSpec {
            train_per_class: 200,
            dev_per_class: 0,
            eval_per_class: 200,
            duration_s: (1.0, 2.0),
            pause_s: (0.2, 0.5),
            f0_hz: (100.0, 250.0),
            sample_rate_hz: 16_000,
            level_dbfs: -23.0,
            level_jitter_db: 1.0,
            noise_floor_dbfs: -75.0,
            bonafide: ClassRecipe::bonafide(),
            spoof: ClassRecipe::spoof(),
            seed: 0,
        }
    }
}

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.train_per_class == 0 || self.eval_per_class == 0 {
            return bad("train and eval counts must be positive");
        }
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !range_ok(self.duration_s) || !range_ok(self.pause_s) || !range_ok(self.f0_hz) {
            return bad("duration, pause and f0 ranges must be positive with lo <= hi");
        }
        if self.f0_hz.1 >= self.sample_rate_hz as f64 / 2.0 {
            return bad("f0 range reaches Nyquist");
        }
        if self.bonafide == self.spoof {
            return bad("class recipes are identical; the classes would be indistinguishable");
        }
        for r in [&self.bonafide, &self.spoof] {
            if r.harmonics == 0 || !(r.tilt_jitter_db >= 0.0) || !(r.f0_jitter >= 0.0 && r.f0_jitter < 0.5) {
                return bad("recipe needs >= 1 harmonic, non-negative jitter and f0 jitter below 0.5");
            }
        }
        Ok(())
    }

    fn recipe(&self, class: ClassLabel) -> &ClassRecipe {
        match class {
            ClassLabel::Bonafide => &self.bonafide,
            ClassLabel::Spoof => &self.spoof,
        }
    }

    /// Trial records in a fixed order: subset, then class, then index.
    pub fn records(&self) -> Vec<TrialRecord> {
        let mut out = Vec::new();
        for (subset, tag, n) in [
            (Subset::Train, "T", self.train_per_class),
            (Subset::Dev, "D", self.dev_per_class),
            (Subset::Eval, "E", self.eval_per_class),
        ] {
            let mut idx = 0;
            for class in [ClassLabel::Bonafide, ClassLabel::Spoof] {
                for i in 0..n {
                    idx += 1;
                    out.push(TrialRecord {
                        utt_id: format!("SYN_{tag}_{idx:06}"),
                        speaker_id: Some(format!("SPK{:03}", i % 10)),
                        attack_id: match class {
                            ClassLabel::Bonafide => None,
                            ClassLabel::Spoof => Some(format!("S{:02}", 1 + i % 4)),
                        },
                        class,
                        subset,
                    });
                }
            }
        }
        out
    }
}

/// Render one file of the corpus. Deterministic in `(spec.seed, record.utt_id)`.
pub fn synth_waveform(spec: &SynthCorpusSpec, record: &TrialRecord) -> Result<Waveform> {
    let mut rng = SeedContext::new(spec.seed, record.utt_id.as_str(), "synth", "").rng();
    let recipe = spec.recipe(record.class);
    let fs = spec.sample_rate_hz as f64;

    let voiced_s = rng.random_range(spec.duration_s.0..=spec.duration_s.1);
    let lead_s = rng.random_range(spec.pause_s.0..=spec.pause_s.1);
    let trail_s = rng.random_range(spec.pause_s.0..=spec.pause_s.1);
    let f0 = rng.random_range(spec.f0_hz.0..=spec.f0_hz.1);
    let tilt = recipe.tilt_db_per_oct + recipe.tilt_jitter_db * rng.sample::<f64, _>(StandardNormal);
    let level = spec.level_dbfs + spec.level_jitter_db * rng.sample::<f64, _>(StandardNormal);
    let vib_rate = rng.random_range(3.0..6.0);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let syl_rate = rng.random_range(2.5..4.5);

    let n_lead = (lead_s * fs).round() as usize;
    let n_voiced = (voiced_s * fs).round() as usize;
    let n_trail = (trail_s * fs).round() as usize;

    // partials stay below Nyquist even at the top of the vibrato
    let f0_max = f0 * (1.0 + recipe.f0_jitter);
    let n_harm = recipe
        .harmonics
        .min(((0.95 * fs / 2.0) / f0_max).floor() as usize)
        .max(1);
    // partial k is Im(c_k * e^{i k theta}) with c_k = a_k e^{i phi_k}
    let partials: Vec<(f64, f64)> = (1..=n_harm)
        .map(|k| {
            let amp = 10f64.powf(tilt * (k as f64).log2() / 20.0);
            let phase = if recipe.random_phase {
                rng.random_range(0.0..2.0 * PI)
            } else {
                0.0
            };
            (amp * phase.cos(), amp * phase.sin())
        })
        .collect();

    let mut voiced = Vec::with_capacity(n_voiced);
    let mut theta = 0.0;
    for i in 0..n_voiced {
        let t = i as f64 / fs;
        let inst_f0 = f0 * (1.0 + recipe.f0_jitter * (2.0 * PI * vib_rate * t + vib_phase).sin());
        theta += 2.0 * PI * inst_f0 / fs;
        let env = 0.4 + 0.6 * (PI * syl_rate * t).sin().abs();
        let (zr, zi) = (theta.cos(), theta.sin());
        let (mut pr, mut pi) = (zr, zi);
        let mut x = 0.0;
        for (cr, ci) in &partials {
            x += pr * ci + pi * cr;
            (pr, pi) = (pr * zr - pi * zi, pr * zi + pi * zr);
        }
        voiced.push(env * x);
    }
    let rms = (voiced.iter().map(|v| v * v).sum::<f64>() / n_voiced.max(1) as f64).sqrt();
    let gain = if rms > 0.0 { 10f64.powf(level / 20.0) / rms } else { 0.0 };

    let noise_amp = 10f64.powf(spec.noise_floor_dbfs / 20.0);
    let mut samples = Vec::with_capacity(n_lead + n_voiced + n_trail);
    samples.extend(std::iter::repeat_n(0.0, n_lead));
    samples.extend(voiced.iter().map(|v| v * gain));
    samples.extend(std::iter::repeat_n(0.0, n_trail));
    for s in samples.iter_mut() {
        *s = (*s + noise_amp * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0);
    }
    Waveform::new(record.utt_id.as_str(), spec.sample_rate_hz, samples)
}

/// Where a generated corpus lives.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub root: PathBuf,
    pub audio_dir: PathBuf,
    pub protocols: Vec<(PathBuf, Subset)>,
    pub records: Vec<TrialRecord>,
}

pub fn protocol_file_name(subset: Subset) -> &'static str {
    match subset {
        Subset::Train => "synth.cm.train.trn.txt",
        Subset::Dev => "synth.cm.dev.trl.txt",
        Subset::Eval => "synth.cm.eval.trl.txt",
    }
}

/// Write `<root>/wav/<utt_id>.wav` and `<root>/protocols/*.txt`.
pub fn gen_corpus(spec: &SynthCorpusSpec, root: impl AsRef<Path>) -> Result<SynthCorpus> {
    spec.validate()?;
    let root = root.as_ref().to_path_buf();
    let audio_dir = root.join("wav");
    let proto_dir = root.join("protocols");
    for d in [&audio_dir, &proto_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let records = spec.records();
    records.par_iter().try_for_each(|r| {
        let w = synth_waveform(spec, r)?;
        write_pcm(&w, audio_dir.join(format!("{}.wav", r.utt_id)))
    })?;
    let mut protocols = Vec::new();
    for subset in [Subset::Train, Subset::Dev, Subset::Eval] {
        let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.subset == subset).collect();
        if rows.is_empty() {
            continue;
        }
        let path = proto_dir.join(protocol_file_name(subset));
        write_protocol(rows, &path)?;
        protocols.push((path, subset));
    }
    Ok(SynthCorpus {
        root,
        audio_dir,
        protocols,
        records,
    })
}

/// Planted coefficients for drawing scores from the linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScoreSpec {
    pub mu: f64,
    pub d: f64,
    pub beta_bona: f64,
    pub beta_spf: f64,
    /// Zero gives every trial its cell mean exactly.
    pub sigma_eps: f64,
    pub trials_per_cell: usize,
    pub seed: u64,
}

impl SynthScoreSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.d, self.beta_bona, self.beta_spf].iter().all(|v| v.is_finite());
        if !finite || !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) || self.trials_per_cell == 0 {
            return Err(Error::InvalidParameter(
                "score spec needs finite coefficients, sigma_eps >= 0 and trials_per_cell > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn cell_mean(&self, config: &InterventionConfig, class: ClassLabel) -> f64 {
        let (db, ds) = config.deltas_for(class);
        self.mu + self.d * class.y() as f64 + self.beta_bona * db + self.beta_spf * ds
    }
}

/// Draw `trials_per_cell` scores for each (config, class) cell.
pub fn gen_scores(spec: &SynthScoreSpec, configs: &[InterventionConfig]) -> Result<Vec<RegressionRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(configs.len() * 2 * spec.trials_per_cell);
    for cfg in configs {
        let mut rng = SeedContext::new(spec.seed, "", "scores", cfg.name.as_str()).rng();
        let noise = Normal::new(0.0, spec.sigma_eps).expect("validated sigma");
        for class in [ClassLabel::Spoof, ClassLabel::Bonafide] {
            let m = spec.cell_mean(cfg, class);
            for _ in 0..spec.trials_per_cell {
                rows.push(RegressionRow::new(m + noise.sample(&mut rng), class, cfg));
            }
        }
    }
    Ok(rows)
}
